"""Non-embedding parameter counts of the default generator and discriminator."""

import sys

from histlm.hlm import HlmConfig, parameter_ratio

vocab = int(sys.argv[1]) if len(sys.argv) > 1 else 100
gen, disc = parameter_ratio(HlmConfig.generator(vocab), HlmConfig.discriminator(vocab))
print(f"generator\t{gen}\ndiscriminator\t{disc}\nratio\t{gen / disc:.4f}")
