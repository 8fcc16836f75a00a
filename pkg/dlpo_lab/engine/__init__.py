from .autograd import Op, Tape, Var, backward, finite_diff_check, forward
