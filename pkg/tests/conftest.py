import slotsearch.grad as grad

grad.FINITE_CHECKS = True
