"""Speech anti-spoofing countermeasure pipeline.

Feature extraction (cepstral, phase, tandem, utterance functionals),
GMM-UBM and total-variability i-vector modeling, one-class and SVM back
ends, score fusion, and EER evaluation on a synthetic spoofing corpus.
"""

from .audio import AudioError, Waveform, read_wav, write_wav
from .backends import (
    BackendError,
    CosineReference,
    KnnModel,
    MinMaxScaler,
    PldaModel,
    PldaScorer,
    SvmKernel,
    SvmModel,
    apply_minmax,
    cosine_score,
    fit_cosine,
    fit_minmax,
    fit_plda,
    fit_svm,
    knn_score,
    length_normalize,
    plda_score,
    svm_score,
)
from .corpus import (
    CorpusSpec,
    SpoofTransform,
    apply_spoof,
    build_corpus,
    default_transforms,
    read_manifest,
    synth_genuine,
    write_manifest,
)
from .evaluation import (
    EvalError,
    FusionWeights,
    ScoreSet,
    Trial,
    TrialSet,
    compute_eer,
    det_points,
    fuse_scores,
    leave_one_spoof_out,
    tune_weights,
)
from .features import (
    FeatureError,
    FrameConfig,
    FrameMatrix,
    GmmPosteriorgram,
    GroupDelayConfig,
    MfccConfig,
    append_deltas,
    compute_mfcc,
    compute_mgd_spectrum,
    compute_mgdcc,
    energy_vad,
    frame_signal,
    mel_filterbank,
    tandem_features,
)
from .functionals import FunctionalConfig, extract_functionals, feature_names
from .gmm import BaumWelchStats, GmmError, GmmModel, accumulate_stats, train_gmm
from .ivector import (
    IVectorError,
    PcaModel,
    TotalVariabilityModel,
    apply_pca,
    extract_ivector,
    extract_ivectors,
    train_pca,
    train_tv,
)

__version__ = "0.1.0"
