# Custom Exceptions
class UnsupportedDegree(Exception):
	def __init__(self, degree: int, low: int, high: int):
		message = f"Polynomial degree '{degree}' is not supported, expected {low} <= p <= {high}"
		super().__init__(message)
		self.degree = degree
		self.low = low
		self.high = high
class InvalidFaceIndex(Exception):
	def __init__(self, face: int, n_faces: int):
		message = f"Face index '{face}' out of range for mesh with {n_faces} faces"
		super().__init__(message)
		self.face = face
		self.n_faces = n_faces
class MeshFormatError(Exception):
	def __init__(self, path: str, line_number: int, reason: str):
		message = f"Malformed mesh file '{path}' at line {line_number}: {reason}"
		super().__init__(message)
		self.path = path
		self.line_number = line_number
		self.reason = reason
class DegenerateCell(Exception):
	def __init__(self, cell: int, area: float):
		message = f"Cell '{cell}' is degenerate (signed area {area:.3e})"
		super().__init__(message)
		self.cell = cell
		self.area = area
class LocalSolverError(Exception):
	def __init__(self, cell: int, reason: str):
		message = f"Local solver failed on cell '{cell}': {reason}"
		super().__init__(message)
		self.cell = cell
		self.reason = reason
class SingularMatrixError(Exception):
	def __init__(self, pivot: int):
		message = f"Matrix is singular: zero pivot at index {pivot}"
		super().__init__(message)
		self.pivot = pivot
class DimensionMismatch(Exception):
	def __init__(self, expected: int, got: int, operation: str):
		message = f"Dimension mismatch in '{operation}': expected {expected}, got {got}"
		super().__init__(message)
		self.expected = expected
		self.got = got
		self.operation = operation
class InjectionMismatch(Exception):
	def __init__(self, dof: int, deviation: float):
		message = f"Continuous extension disagrees across coarse faces at fine dof {dof} (deviation {deviation:.3e})"
		super().__init__(message)
		self.dof = dof
		self.deviation = deviation
class ZeroDiagonal(Exception):
	def __init__(self, row: int):
		message = f"Zero diagonal entry in row {row}, smoother cannot be built"
		super().__init__(message)
		self.row = row
class EigenvalueEstimateError(Exception):
	def __init__(self, reason: str):
		message = f"Eigenvalue estimate did not converge: {reason}"
		super().__init__(message)
		self.reason = reason
class ConfigurationError(Exception):
	def __init__(self, key: str, value, reason: str):
		message = f"Invalid configuration value for '{key}': {value!r} ({reason})"
		super().__init__(message)
		self.key = key
		self.value = value
		self.reason = reason
class ReportWriteError(Exception):
	def __init__(self, path: str, reason: str):
		message = f"Could not write report to '{path}': {reason}"
		super().__init__(message)
		self.path = path
		self.reason = reason
