"""Exception hierarchy shared across the package."""


class StratPermError(ValueError):
    """Base class for data and validation errors raised by stratperm."""


class MissingColumn(StratPermError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"column {name!r} not found in CSV header")


class NonNumericCell(StratPermError):
    def __init__(self, row, col, value):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"non-numeric value {value!r} at row {row}, column {col!r}")


class RankDeficient(StratPermError):
    def __init__(self, rank, required, message=None):
        self.rank = rank
        self.required = required
        self.deficiency = required - rank
        if message is None:
            message = (f"design matrix has numerical rank {rank} < {required} "
                       f"(deficient subspace dimension {required - rank})")
        super().__init__(message)


class DimensionMismatch(StratPermError):
    pass


class DegenerateStatistic(StratPermError):
    pass


class DomainError(StratPermError):
    pass


class UnsortedGrid(StratPermError):
    pass


class MultidimensionalBeta(StratPermError):
    pass


class LeverageOne(StratPermError):
    pass
