# pylint: disable=missing-module-docstring
import numpy as np
from stereopose.lifting import (
    LifterArchitecture,
    ReconInput,
    ReconModel,
    ViewSynthModel,
)
from stereopose.neuralnet import MlpConfig, TrainConfig, init_kaiming
from stereopose.skeleton import normalize_pixels

TINY_ARCHITECTURE = LifterArchitecture(hidden_dim=16, n_residual_blocks=1,
                                       dropout_rate=0.1, seed=1)

QUICK_TRAINING = TrainConfig(batch_size=16, epochs=2, seed=1)

MEMORIZING_ARCHITECTURE = LifterArchitecture(
    hidden_dim=64, n_residual_blocks=1, dropout_rate=0.0, max_norm=10.0,
    batch_norm=False, seed=2,
)

MEMORIZING_TRAINING = TrainConfig(lr0=3e-3, lr_decay=0.995, weight_decay=0.0,
                                  batch_size=4, epochs=1000, seed=2)


def constant_network(input_dim, output):
    """A network that ignores its input and returns ``output``"""
    output = np.ravel(output)
    model = init_kaiming(MlpConfig(input_dim=input_dim,
                                   output_dim=output.size, hidden_dim=4,
                                   n_residual_blocks=0, dropout_rate=0.0,
                                   batch_norm=False))
    for name in model.weight_names:
        model.params[name][:] = 0
    model.params["head.bias"][:] = output
    return model


def oracle_lifters(pair):
    """View synthesis and reconstruction models that reproduce the ground
    truth of a single pair exactly"""
    num_joints = pair.schema.num_joints
    view_model = ViewSynthModel(
        constant_network(2 * num_joints, normalize_pixels(pair.right2d.joints)),
        pair.schema,
    )
    recon_model = ReconModel(
        constant_network(4 * num_joints, pair.pose3d.joints / 1000.0),
        pair.schema,
        ReconInput.STEREO,
    )
    return view_model, recon_model
