"""Toy-scale capacity check: RTD, PoS, morph and lemma training accuracy plus checkpoint digests."""

from histlm.overfit import run_overfit_suite

report = run_overfit_suite(log=print)
for stage, digest in report.digests.items():
    print(f"{stage}\t{digest}")
