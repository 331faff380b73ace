"""Regenerates the frozen band tables used by the tf_transform tests.

Independent of the C++ code: third-octave edges follow the classic STOI
band edges 150*2^((2j-1)/6) .. 150*2^((2j+1)/6); a bin belongs to the band
whose half-open edge interval contains its centre frequency),
ERB centres follow 21.4*log10(1 + 0.00437 f) between 100 Hz and 0.95*Nyquist.
"""
import numpy as np

RATE, NFFT = 10000, 256
freqs = np.linspace(0, RATE, NFFT + 1)[: NFFT // 2 + 1]

with open("third_octave_k256_10k.txt", "w") as f:
    f.write("# band center_hz first_bin last_bin_exclusive\n")
    for j in range(15):
        cf = 150 * 2 ** (j / 3)
        lo = 150 * 2 ** ((2 * j - 1) / 6)
        hi = 150 * 2 ** ((2 * j + 1) / 6)
        members = np.nonzero((freqs >= lo) & (freqs < hi))[0]
        a, b = int(members[0]), int(members[-1]) + 1
        f.write(f"{j} {cf:.6f} {a} {b}\n")

erb = lambda hz: 21.4 * np.log10(1 + 0.00437 * hz)
inv = lambda e: (10 ** (e / 21.4) - 1) / 0.00437
centres = inv(np.linspace(erb(100.0), erb(0.95 * RATE / 2), 30))
with open("erb30_k256_10k.txt", "w") as f:
    f.write("# band center_hz\n")
    for i, c in enumerate(centres):
        f.write(f"{i} {c:.9f}\n")
