"""BB84 quantum key distribution simulator and security toolkit.

Layers, bottom up:

- :mod:`qkdsim.qsim` exact single-qubit/few-qubit quantum mechanics
- :mod:`qkdsim.optics` photon-number sources, lossy fiber, gated detectors
- :mod:`qkdsim.attacks` intercept-resend, PNS, time-shift, faked-state,
  phase-remap strategies
- :mod:`qkdsim.protocols` session engine, sifting, decoy-state estimation,
  key-rate bounds
- :mod:`qkdsim.postprocess` error reconciliation, privacy amplification,
  leftover-hash and private-state checks
- :mod:`qkdsim.hashing` two-universal hash families
- :mod:`qkdsim.otp` one-time-pad ledger and randomness checks
- :mod:`qkdsim.config` / :mod:`qkdsim.pipeline` / :mod:`qkdsim.report` /
  :mod:`qkdsim.cli` experiment configs, end-to-end run orchestration,
  reproducible reports and figures, command line
"""

__version__ = "0.1.0"
