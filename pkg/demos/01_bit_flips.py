"""What a single bit flip does to a quantized value, and how the RMS
disturbance per flip follows from the bit-weight ladder."""
# %%
import numpy as np

from softerr.quant import QuantConfig, dequantize_words, flip_words, quantize_words
from softerr.stat_models import sigma_delta

cfg = QuantConfig(bits=8, bound=2.0)
w = quantize_words(np.array([0.7]), cfg)
print("0.7 ->", w[0], "->", dequantize_words(w, cfg)[0])

# flipping bit b (0 = LSB) moves the value by bound / 2**(bits-1-b)
for b in range(cfg.bits):
    d = dequantize_words(flip_words(w, b, cfg.bits), cfg) - dequantize_words(w, cfg)
    print(f"bit {b}: change {d[0]:+.5f}")

# %%
# RMS over uniformly chosen bits is the closed-form sigma_delta, close to
# bound/sqrt(6) for int8 and bound/sqrt(12) for int16
rng = np.random.default_rng(0)
for bits in (8, 16):
    cfg = QuantConfig(bits, 1.0)
    words = quantize_words(rng.uniform(-1, 1, 100_000), cfg)
    flipped = flip_words(words, rng.integers(0, bits, words.size), bits)
    d = dequantize_words(flipped, cfg) - dequantize_words(words, cfg)
    print(f"int{bits}: empirical {np.sqrt(np.mean(d**2)):.5f}  exact {sigma_delta(bits, 1.0):.5f}  "
          f"1/sqrt({6 if bits == 8 else 12}) = {1/np.sqrt(6 if bits == 8 else 12):.5f}")
