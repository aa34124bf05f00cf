"""Custom canonical certificates carrying a KEM public key.

Not X.509: a certificate is five length-prefixed fields (the signed
portion) followed by the issuer's hash-based signature over exactly those
bytes.  The KEM public key is embedded whole, which is what makes the
Certificate handshake message the megabyte-scale payload for large
parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..cbkem import KemParams, kem_parse_pk
from ..errors import MalformedEncoding, ParameterError
from ..hbs import (
    HbsKeyPair,
    HbsParams,
    HbsSignature,
    hbs_parse_sig,
    hbs_serialize_sig,
    hbs_sign,
    hbs_verify,
)
from ..primitives import Rng
from .wire import Reader, _vec8, _vec16, _vec32


@dataclass(frozen=True)
class Certificate:
    subject: str
    kem_algorithm_id: str
    kem_public_key: bytes
    hbs_algorithm_id: str
    issuer_root: bytes
    issuer_signature: HbsSignature


def _signed_portion(
    subject: str,
    kem_algorithm_id: str,
    kem_public_key: bytes,
    hbs_algorithm_id: str,
    issuer_root: bytes,
) -> bytes:
    return (
        _vec16(subject.encode("utf-8"))
        + _vec8(kem_algorithm_id.encode("ascii"))
        + _vec32(kem_public_key)
        + _vec8(hbs_algorithm_id.encode("ascii"))
        + _vec8(issuer_root)
    )


def issue_certificate(
    issuer: HbsKeyPair, subject: str, kem_algorithm_id: str, kem_public_key: bytes, rng: Rng
) -> Certificate:
    """Sign a certificate with the issuer's hash-based key.  Stateful
    issuer keys consume one leaf per issued certificate."""
    body = _signed_portion(
        subject, kem_algorithm_id, kem_public_key, issuer.params.algorithm_id, issuer.root
    )
    signature = hbs_sign(issuer, body, rng)
    return Certificate(
        subject=subject,
        kem_algorithm_id=kem_algorithm_id,
        kem_public_key=kem_public_key,
        hbs_algorithm_id=issuer.params.algorithm_id,
        issuer_root=issuer.root,
        issuer_signature=signature,
    )


def encode_certificate(cert: Certificate) -> bytes:
    body = _signed_portion(
        cert.subject,
        cert.kem_algorithm_id,
        cert.kem_public_key,
        cert.hbs_algorithm_id,
        cert.issuer_root,
    )
    return body + _vec32(hbs_serialize_sig(cert.issuer_signature))


def parse_certificate(data: bytes) -> Certificate:
    r = Reader(data)
    try:
        subject = r.vec16().decode("utf-8")
        kem_algorithm_id = r.vec8().decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedEncoding("certificate text field not decodable", offset=r.offset) from exc
    kem_public_key = r.vec32()
    try:
        hbs_algorithm_id = r.vec8().decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedEncoding("certificate text field not decodable", offset=r.offset) from exc
    issuer_root = r.vec8()
    sig_raw = r.vec32()
    r.expect_end()
    try:
        sig_params = HbsParams.from_algorithm_id(hbs_algorithm_id)
    except ParameterError as exc:
        raise MalformedEncoding(f"certificate signature algorithm: {exc}") from exc
    signature = hbs_parse_sig(sig_params, sig_raw)
    return Certificate(
        subject=subject,
        kem_algorithm_id=kem_algorithm_id,
        kem_public_key=kem_public_key,
        hbs_algorithm_id=hbs_algorithm_id,
        issuer_root=issuer_root,
        issuer_signature=signature,
    )


def verify_certificate(cert: Certificate, trusted_roots: tuple[bytes, ...]) -> bool:
    """Issuer signature valid under a trusted root, and the embedded KEM
    key structurally sound for its declared algorithm."""
    if cert.issuer_root not in trusted_roots:
        return False
    try:
        sig_params = HbsParams.from_algorithm_id(cert.hbs_algorithm_id)
        kem_params = KemParams.from_algorithm_id(cert.kem_algorithm_id)
        kem_parse_pk(kem_params, cert.kem_public_key)
    except (ParameterError, MalformedEncoding):
        return False
    body = _signed_portion(
        cert.subject,
        cert.kem_algorithm_id,
        cert.kem_public_key,
        cert.hbs_algorithm_id,
        cert.issuer_root,
    )
    return hbs_verify(cert.issuer_root, sig_params, body, cert.issuer_signature)
