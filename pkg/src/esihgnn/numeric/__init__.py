from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, relative_error
from .ops import (
    add,
    concat,
    constant,
    cross_entropy,
    dot,
    gather_rows,
    gru_cell,
    index,
    leaky_relu,
    linear,
    mul,
    neg,
    reshape,
    scale,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax,
    sub,
    sum,
    take_rows,
    tanh,
    zeros,
)
from .tape import (
    Parameter,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    get_default_dtype,
    no_record,
    precision,
    set_default_dtype,
)
from .params import GruParams, init_gru, init_linear
