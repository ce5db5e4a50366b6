"""
Operational intensity of matrix products
========================================

Square products reuse every operand many times; a product where one
dimension collapses to 1 is a matrix-vector product and its intensity stays
below one FLOP per byte no matter how large the other dimensions get.
"""

from nsprof.intensity import Boundedness, GemmDims, MachineModel, boundedness, gemm_intensity

machine = MachineModel.from_balance(10)  # FLOP per byte of the target machine

for dims in [(2, 2, 2), (64, 64, 64), (4096, 4096, 4096), (1024, 1024, 1), (2048, 1, 2048)]:
    est = gemm_intensity(GemmDims(*dims), bytes_per_element=4)
    bound = boundedness(est, machine)
    print(f"{str(dims):<20} I = {float(est.intensity):9.4f}  tall-skinny={est.tall_skinny!s:<5}  {bound.value}")

# Growing m and n with k fixed at 1 never lifts the product off the memory wall.
for size in (256, 4096, 65536):
    est = gemm_intensity(GemmDims(size, 1, size))
    assert boundedness(est, machine) is Boundedness.MEMORY_BOUND
    print(f"k=1, m=n={size:<6} I = {est.intensity} (~{float(est.intensity):.4f})")
