"""Agency/server message protocol: pure steps, wire format and simulation."""

from privlogit.protocol.ops import (
    EncryptedDataset,
    EncryptedShare,
    ProtocolViolation,
    PseudoResponse,
    VerificationReport,
    VerificationUnavailable,
    accumulate_bstar,
    decrypt_estimate,
    encrypt_own,
    encrypt_pseudo_chain,
    make_pseudo_response,
    relay_encrypt,
    server_assemble,
    server_solve_pseudo,
    verify_decryption,
    verify_encryption,
)
from privlogit.protocol.simulation import (
    KeyEscrow,
    PipelineResult,
    ProtocolConfig,
    ProtocolResult,
    ProtocolTranscript,
    ring_chain,
    run_pipeline,
    run_protocol,
)
