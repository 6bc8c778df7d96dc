"""Rate limitation and lightweight authentication against battery exhaustion
of constrained service providers.

The package splits into battery budget arithmetic (:mod:`drainguard.energy`),
per-requester rate limitation (:mod:`drainguard.limiter`), the symmetric and
signature primitives (:mod:`drainguard.crypto`), message formats and the two
authentication protocols (:mod:`drainguard.messages`,
:mod:`drainguard.protocols`), a deterministic discrete-event simulator
(:mod:`drainguard.simnet`) and the scenario command line
(:mod:`drainguard.scenarios`, :mod:`drainguard.cli`).
"""

__version__ = "0.1.0"
