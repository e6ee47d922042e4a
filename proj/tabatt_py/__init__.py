from ._tabatt import (  # noqa: F401
    attention_maps,
    conv2d,
    conv3d,
    cosine_lr,
    generate_dataset,
    matmul,
    metrics,
    relu,
    segment_starts,
    sigmoid,
    softmax,
    stratified_folds,
    tabattention,
)
