from envtrack.features.profiles import (
    ProfileSet,
    SpeakerProfile,
    build_profiles,
    extract_speaker_features,
    segment_features,
)
from envtrack.features.spectral import (
    FractalFit,
    PowerSpectrum,
    band_periodic_power,
    fit_fractal,
    multitaper_psd,
    periodic_fraction,
)
from envtrack.features.visual import lip_features
from envtrack.features.voice import (
    GlottalCycles,
    PitchTrack,
    extract_glottal_cycles,
    harmonicity,
    intensity_contour,
    jitter_metrics,
    min_intensity,
    pitch_statistics,
    pitch_track,
    shimmer_metrics,
)

__all__ = [
    'FractalFit',
    'GlottalCycles',
    'PitchTrack',
    'PowerSpectrum',
    'ProfileSet',
    'SpeakerProfile',
    'band_periodic_power',
    'build_profiles',
    'extract_glottal_cycles',
    'extract_speaker_features',
    'fit_fractal',
    'harmonicity',
    'intensity_contour',
    'jitter_metrics',
    'lip_features',
    'min_intensity',
    'multitaper_psd',
    'periodic_fraction',
    'pitch_statistics',
    'pitch_track',
    'segment_features',
    'shimmer_metrics',
]
