import enum


class Condition(enum.Enum):
    """Аудиовизуальное условие предъявления речи."""

    AV = 'AV'  # конгруэнтное аудио + видео
    A = 'A'  # только аудио
    V = 'V'  # только видео
    ML = 'ML'  # аудио + видео с закрытыми губами (masked lips)


class Noise(enum.Enum):
    """Фоновый шум (babble) во время триала."""

    noise = 'noise'
    quiet = 'quiet'


class FilterKind(enum.Enum):
    lowpass = 'lowpass'
    highpass = 'highpass'


class WindowKind(enum.Enum):
    hamming = 'hamming'
    hann = 'hann'


# Порядок уровней факторов в массиве subjects × 2 × 4 (ANOVA, t-тесты).
NOISE_LEVELS = (Noise.noise, Noise.quiet)
CONDITION_LEVELS = (Condition.AV, Condition.A, Condition.V, Condition.ML)

# Частота огибающей и эпох ЭЭГ после препроцессинга, Гц.
ENVELOPE_RATE = 64
# Длительность триала/эпохи, с.
EPOCH_S = 30
# Шаг лага на 64 Гц: 1000 / 64 мс.
LAG_STEP_MS = 1000 / ENVELOPE_RATE
# 33 лага 0..500 мс (индексы 0..32).
SWEEP_MAX_LAG_MS = 500.0
# Окно интереса для многолаговых моделей, мс.
WINDOW_OF_INTEREST_MS = (200.0, 325.0)

# Сетка ridge-параметра: 1e-2 … 1e4, 5e4, 1e5 … 1e9 (13 значений).
PAPER_LAMBDA_GRID = tuple(
    [10.0**k for k in range(-2, 5)] + [5e4] + [10.0**k for k in range(5, 10)]
)

# Огибающая речи: гамматон-банк и финальный НЧ-фильтр.
GAMMATONE_BANDS = 128
GAMMATONE_FMIN_HZ = 100.0
GAMMATONE_FMAX_HZ = 6500.0
GAMMATONE_ORDER = 4
ENVELOPE_LOWPASS_HZ = 30.0
ENVELOPE_BUTTER_ORDER = 3

# Препроцессинг ЭЭГ: (cutoff Гц, порядок, окно) для каждого FIR-этапа.
EEG_RAW_RATE = 500
EEG_ANALYSIS_RATE = 250
EEG_ANALYSIS_LOWPASS = (40.0, 166, WindowKind.hamming)
EEG_ANALYSIS_HIGHPASS = (1.0, 414, WindowKind.hamming)
EEG_FINAL_LOWPASS = (30.0, 220, WindowKind.hann)
EEG_FINAL_HIGHPASS = (0.3, 500, WindowKind.hann)
BAD_CHANNEL_SD = 2.0
REJECT_AMPLITUDE_UV = 80.0
REJECT_KURTOSIS_SD = 3.0
REJECT_EPOCH_S = 1.0

# Сферические сплайны: порядок m, число членов ряда Лежандра, регуляризация.
SPLINE_ORDER = 4
SPLINE_LEGENDRE_TERMS = 50
SPLINE_REGULARIZATION = 1e-5

# Признаки дикторов: спектральный анализ на пониженной частоте (до 4.5 кГц).
FEATURE_AUDIO_RATE = 10_000
MULTITAPER_SMOOTHING_HZ = 0.5
MULTITAPER_RANGE_HZ = (0.3, 4500.0)
PITCH_FLOOR_HZ = 75.0
PITCH_CEILING_HZ = 600.0
# Трекер высоты тона: шаг 10 мс, порог вокализации по нормированной
# автокорреляции, порог тишины относительно глобального пика, штраф за октаву.
PITCH_HOP_S = 0.01
PITCH_VOICING_THRESHOLD = 0.45
PITCH_SILENCE_THRESHOLD = 0.03
PITCH_OCTAVE_COST = 0.01
# Соседние глоттальные периоды не должны отличаться больше чем в 1.3 раза.
MAX_PERIOD_FACTOR = 1.3
INTENSITY_FRAME_S = 0.032
INTENSITY_HOP_S = 0.01
# Опорное давление 20 мкПа и нижняя граница среднего квадрата (тишина).
INTENSITY_REF_PA = 2e-5
INTENSITY_FLOOR = 1e-20
# Робастная подгонка фрактальной компоненты: итерации и константа бисквера.
FRACTAL_ITERATIONS = 3
BISQUARE_C = 4.685
# Полосы периодической мощности, Гц: [lo, hi), последняя закрыта справа.
FEATURE_BANDS_HZ = {
    'FreqRsum_env': (0.3, 30.0),
    'FreqRsum_low': (30.0, 300.0),
    'FreqRsum_mid': (300.0, 1000.0),
    'FreqRsum_high': (1000.0, 4500.0),
}
LIP_VIDEO_FPS = 25
LIP_DARK_FRACTION = 0.35
PROFILE_MAX_ABS_R = 0.8

# Объявленный порядок признаков: от него зависит, какой из коррелирующих
# признаков останется после прореживания.
BAND_FEATURES = ('FreqRsum_env', 'FreqRsum_low', 'FreqRsum_mid', 'FreqRsum_high')
PITCH_FEATURES = ('meanPitch', 'medianPitch', 'sdPitch', 'minPitch', 'maxPitch')
JITTER_FEATURES = ('jitter_loc', 'jitter_loc_abs', 'jitter_rap', 'jitter_ppq5')
SHIMMER_FEATURES = (
    'shimmer_loc',
    'shimmer_loc_dB',
    'shimmer_apq3',
    'shimmer_apq5',
    'shimmer_apq11',
)
VISUAL_FEATURES = ('avgLipOpen', 'avgLipBright')
FEATURE_ORDER = (
    BAND_FEATURES
    + PITCH_FEATURES
    + JITTER_FEATURES
    + SHIMMER_FEATURES
    + ('mean_nhr', 'min_intensity')
    + VISUAL_FEATURES
)

# Версия CSV-схем: первая строка файла `# envtrack-csv v1 <kind>`.
CSV_SCHEMA_VERSION = 1

# Стандартный 24-канальный монтаж 10-20: метка -> (азимут, элевация) в градусах.
# Азимут от носа (+x) к левому уху (+y), элевация от экватора к вертексу.
STANDARD_MONTAGE_24 = {
    'Fp1': (18.0, 0.0),
    'Fp2': (-18.0, 0.0),
    'F7': (54.0, 0.0),
    'F3': (40.0, 40.0),
    'Fz': (0.0, 45.0),
    'F4': (-40.0, 40.0),
    'F8': (-54.0, 0.0),
    'FC1': (45.0, 65.0),
    'FC2': (-45.0, 65.0),
    'T7': (90.0, 0.0),
    'C3': (90.0, 45.0),
    'Cz': (0.0, 90.0),
    'C4': (-90.0, 45.0),
    'T8': (-90.0, 0.0),
    'CP1': (135.0, 65.0),
    'CP2': (-135.0, 65.0),
    'P7': (126.0, 0.0),
    'P3': (140.0, 40.0),
    'Pz': (180.0, 45.0),
    'P4': (-140.0, 40.0),
    'P8': (-126.0, 0.0),
    'POz': (180.0, 22.5),
    'O1': (162.0, 0.0),
    'O2': (-162.0, 0.0),
}
