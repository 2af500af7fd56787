"""Exception taxonomy shared across modules.

TransportError is the only retryable class: the orchestrator retries it
with exponential backoff. Everything else is terminal for the failing
stage (retrying a deterministic parse failure is futile).
"""

from __future__ import annotations


class TransportError(Exception):
    """Retryable failure reaching a remote backend (network, 5xx, timeout)."""


class BackendProtocolError(Exception):
    """A backend reply broke its contract (missing script entry, bad shape)."""


class AgentError(Exception):
    """An agent could not produce valid output after its repair attempt."""
