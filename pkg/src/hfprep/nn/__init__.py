from .gradcheck import grad_check
from .layers import (avgpool2_forward, avgpool_backward, avgpool_forward, conv2d_backward,
                     conv2d_forward, fc_backward, fc_forward, global_avgpool_backward,
                     global_avgpool_forward, l1_loss, relu_backward, relu_forward, upsample)
from .optim import OptimizerState, ParamGroup, PlateauHalver, adamw_step, make_optimizer

__all__ = [
    "avgpool2_forward", "avgpool_backward", "avgpool_forward", "conv2d_backward",
    "conv2d_forward", "fc_backward", "fc_forward", "global_avgpool_backward",
    "global_avgpool_forward", "grad_check", "l1_loss", "relu_backward", "relu_forward",
    "upsample", "OptimizerState", "ParamGroup", "PlateauHalver", "adamw_step", "make_optimizer",
]
