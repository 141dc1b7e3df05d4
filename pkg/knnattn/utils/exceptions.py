#!/usr/bin/env python


class KnnAttentionError(Exception):
    pass


class ShapeError(KnnAttentionError):
    def __init__(self, operation, *shapes):
        self.operation = operation
        self.shapes = shapes
        shapes_str = " vs ".join(str(tuple(shape)) for shape in shapes)
        super(ShapeError, self).__init__("{op}: shape mismatch {shapes}".format(op=operation, shapes=shapes_str))


class EmptyAttentionRowError(KnnAttentionError):
    def __init__(self, row):
        self.row = row
        super(EmptyAttentionRowError, self).__init__("empty attention row (row {row})".format(row=row))


class NonFiniteError(KnnAttentionError):
    def __init__(self, what, index=None):
        self.what = what
        self.index = index
        if index is None:
            message = "non-finite value in {what}".format(what=what)
        else:
            message = "non-finite value in {what} at {index}".format(what=what, index=index)
        super(NonFiniteError, self).__init__(message)


class SelectionError(KnnAttentionError):
    def __init__(self, k, n):
        self.k = k
        self.n = n
        super(SelectionError, self).__init__("k={k} out of range, expected 1 <= k <= {n}".format(k=k, n=n))


class DistributionError(KnnAttentionError):
    pass


class TieError(KnnAttentionError):
    pass


class ConfigError(KnnAttentionError):
    pass


class CheckpointError(KnnAttentionError):
    pass


class NumericalAbort(KnnAttentionError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super(NumericalAbort, self).__init__(
            "non-finite loss {loss} at epoch {epoch}, batch {batch}".format(loss=loss, epoch=epoch, batch=batch))


class ZeroNormError(KnnAttentionError):
    def __init__(self, what, index=None):
        self.what = what
        self.index = index
        if index is None:
            message = "{what} has zero norm".format(what=what)
        else:
            message = "{what} {index} has zero norm".format(what=what, index=index)
        super(ZeroNormError, self).__init__(message)
