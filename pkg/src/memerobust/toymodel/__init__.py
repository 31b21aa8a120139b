from .model import (
    Batch,
    ForwardCache,
    GradientBundle,
    ModelConfig,
    NotTrainedError,
    StaleCacheError,
    ToyModel,
    TrainConfig,
    TrainingError,
    backward,
    batch_from_samples,
    forward,
    forward_batch,
    labels_from_probs,
    load_checkpoint,
    make_batch,
    model_fingerprint,
    predict,
    predict_proba,
    sample_losses,
    save_checkpoint,
    train_classifier,
)
from .probe import BottleneckEncoder, LinearEncoder, ProbeReport, sensitivity_probe
from .tda import TdaParams, tda_forward
