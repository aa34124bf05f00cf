"""Command-line front end wiring the library together.

Subcommands cover the key lifecycle (keygen, sign, verify, encrypt,
decrypt), sealed mail envelopes (envelope-seal, envelope-open), the TLS
echo pair (tls-setup, tls-serve, tls-connect), and the handshake-size
measurement harness (measure).

Conventions shared by every subcommand:

  * data goes to files or standard output; diagnostics go to standard
    error, one line per failure
  * exit code 0 on success, 1 on runtime failure (crypto rejection,
    network trouble, unreadable files), 2 on usage errors
  * keystore passwords come from ``--password`` or the
    ``AGILECRYPT_PASSWORD`` environment variable, never from a
    positional argument
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import statistics
import sys
import threading
import time

from .cbkem import NAMED_PARAM_SETS, KemKeyPair, KemParams, kem_keygen, kem_serialize_pk
from .easyapi import (
    EasyEncrypter,
    EasySigner,
    SecurityLevel,
    TemplateKind,
    TemplateRegistry,
    builtin_registry,
    easysigner_verify,
    frame_blob,
    load_registry,
    parse_blob,
    template_resolve,
)
from .errors import AgilecryptError, ConnectionClosed
from .hbs import hbs_keygen
from .keystore import DEFAULT_ITERATIONS, KeystoreParameters
from .mailenv import (
    ENVELOPE_EXTENSION,
    envelope_decode,
    envelope_encode,
    envelope_open,
    envelope_seal,
)
from .minitls import (
    AlertDescription,
    ClientTlsConfig,
    ServerTlsConfig,
    SocketTransport,
    TlsAlertReceived,
    TlsAlertSent,
    TlsError,
    client_handshake,
    connect_tcp,
    encode_certificate,
    issue_certificate,
    parse_certificate,
    server_handshake,
    transcript_report,
    transport_pair,
)
from .primitives import DeterministicRng, Rng, SystemRng

# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

PASSWORD_ENV_VAR = "AGILECRYPT_PASSWORD"

# Handshake parameter sets are named after their KEM; the registry level
# whose ENCRYPTION row carries that KEM supplies the rest of the profile.
PARAMSET_LEVELS = {
    "toy-64": SecurityLevel.LOW,
    "toy-128": SecurityLevel.MEDIUM,
    "mce-emu": SecurityLevel.HIGH,
}

CA_ROOT_FILE = "ca.root"
SERVER_CERT_FILE = "server.cert"
SERVER_SEED_FILE = "server.seed"


class UsageError(Exception):
    """A problem argparse cannot see (for example a missing password)."""


def _fail(message: str) -> int:
    print(f"agilecrypt: error: {message}", file=sys.stderr)
    return 1


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_output(data: bytes, out: str | None) -> None:
    """File when --out is given, raw bytes to stdout otherwise."""
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def _resolve_password(args: argparse.Namespace) -> str:
    if args.password is not None:
        return args.password
    env = os.environ.get(PASSWORD_ENV_VAR)
    if env:
        return env
    raise UsageError(
        f"no keystore password: pass --password or set {PASSWORD_ENV_VAR}"
    )


def _keystore_params(args: argparse.Namespace) -> KeystoreParameters:
    return KeystoreParameters(
        path=args.keystore,
        password=_resolve_password(args),
        iterations=args.kdf_iterations,
    )


def _load_registry_arg(args: argparse.Namespace) -> TemplateRegistry:
    if args.registry is not None:
        return load_registry(args.registry)
    return builtin_registry(1)


def _make_rng(seed: str | None) -> Rng:
    """Deterministic stream for reproducible fixtures and reports,
    operating-system entropy otherwise."""
    if seed is not None:
        return DeterministicRng(seed.encode("utf-8"))
    return SystemRng()


def _alert_label(exc: TlsError) -> str:
    if isinstance(exc, TlsAlertSent):
        return exc.description.name.lower()
    if isinstance(exc, TlsAlertReceived):
        try:
            return AlertDescription(exc.description).name.lower()
        except ValueError:
            return f"alert_{exc.description}"
    return "handshake_failure"


# ---------------------------------------------------------------------------
# Key lifecycle commands
# ---------------------------------------------------------------------------

def _cmd_keygen(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    level = SecurityLevel.from_name(args.level)
    ksp = _keystore_params(args)
    kind = TemplateKind.SIGNATURE if args.kind == "sign" else TemplateKind.ENCRYPTION
    ap = template_resolve(registry, kind, level)
    cls = EasySigner if kind is TemplateKind.SIGNATURE else EasyEncrypter
    with cls.with_new_key(ap, ksp) as handle:
        if args.out is not None:
            _write_output(handle.public_blob, args.out)
        print(handle.alias)
    return 0


def _cmd_sign(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    ksp = _keystore_params(args)
    message = _read_file(args.infile)
    with EasySigner.open(ksp, args.alias, registry.version) as signer:
        blob = signer.sign(message)
    _write_output(blob, args.out if args.out is not None else args.infile + ".sig")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    public_blob = _read_file(args.public)
    message = _read_file(args.infile)
    sig_blob = _read_file(args.sig)
    if easysigner_verify(public_blob, message, sig_blob):
        print("signature valid", file=sys.stderr)
        return 0
    return _fail("signature rejected")


def _cmd_encrypt(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    ksp = _keystore_params(args)
    recipient_blob = _read_file(args.recipient)
    plaintext = _read_file(args.infile)
    with EasyEncrypter.open(ksp, args.alias, registry.version) as enc:
        blob = enc.encrypt(recipient_blob, plaintext)
    _write_output(blob, args.out if args.out is not None else args.infile + ".enc")
    return 0


def _cmd_decrypt(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    ksp = _keystore_params(args)
    blob = _read_file(args.infile)
    with EasyEncrypter.open(ksp, args.alias, registry.version) as enc:
        plaintext = enc.decrypt(blob)
    _write_output(plaintext, args.out)
    return 0


# ---------------------------------------------------------------------------
# Envelope commands
# ---------------------------------------------------------------------------

def _cmd_envelope_seal(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    ksp = _keystore_params(args)
    recipient_blob = _read_file(args.recipient)
    message = _read_file(args.infile)
    with EasySigner.open(ksp, args.alias, registry.version) as signer:
        env = envelope_seal(
            signer,
            recipient_blob,
            message,
            sender_id=args.sender_id,
            recipient_id=args.recipient_id,
        )
    out = args.out if args.out is not None else args.infile + ENVELOPE_EXTENSION
    _write_output(envelope_encode(env), out)
    return 0


def _cmd_envelope_open(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    ksp = _keystore_params(args)
    sender_blob = _read_file(args.sender)
    env = envelope_decode(_read_file(args.infile))
    with EasyEncrypter.open(ksp, args.alias, registry.version) as recipient:
        message = envelope_open(recipient, sender_blob, env)
    _write_output(message, args.out)
    print(
        f"envelope from {env.header.sender_id!r} to {env.header.recipient_id!r} verified",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------------------
# Registry helper
# ---------------------------------------------------------------------------

def _cmd_registry_dump(args: argparse.Namespace) -> int:
    registry = builtin_registry(args.builtin)
    _write_output(registry.canonical_text().encode("ascii"), args.out)
    return 0


# ---------------------------------------------------------------------------
# TLS fixture generation
# ---------------------------------------------------------------------------

def _issue_server_material(
    registry: TemplateRegistry, level: SecurityLevel, subject: str, rng: Rng
):
    """CA key, server KEM key, and a certificate binding them, all drawn
    from the registry's templates at the given level."""
    sig_ap = template_resolve(registry, TemplateKind.SIGNATURE, level)
    enc_ap = template_resolve(registry, TemplateKind.ENCRYPTION, level)
    issuer = hbs_keygen(sig_ap.params, rng)
    kem_kp = kem_keygen(enc_ap.params, rng)
    cert = issue_certificate(
        issuer, subject, enc_ap.algorithm_id, kem_serialize_pk(kem_kp.pk), rng
    )
    return issuer, kem_kp, cert, enc_ap


def _cmd_tls_setup(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    level = SecurityLevel.from_name(args.level)
    rng = _make_rng(args.seed)
    os.makedirs(args.dir, exist_ok=True)
    issuer, kem_kp, cert, enc_ap = _issue_server_material(
        registry, level, args.subject, rng
    )
    with open(os.path.join(args.dir, CA_ROOT_FILE), "wb") as fh:
        fh.write(issuer.root)
    with open(os.path.join(args.dir, SERVER_CERT_FILE), "wb") as fh:
        fh.write(encode_certificate(cert))
    with open(os.path.join(args.dir, SERVER_SEED_FILE), "wb") as fh:
        fh.write(frame_blob(enc_ap.algorithm_id, registry.version, kem_kp.seed))
    print(
        f"wrote {CA_ROOT_FILE}, {SERVER_CERT_FILE}, {SERVER_SEED_FILE} to {args.dir}",
        file=sys.stderr,
    )
    return 0


def _load_server_material(args: argparse.Namespace):
    cert = parse_certificate(_read_file(os.path.join(args.dir, SERVER_CERT_FILE)))
    kem_id, _, seed = parse_blob(_read_file(os.path.join(args.dir, SERVER_SEED_FILE)))
    params = KemParams.from_algorithm_id(kem_id)
    kem_kp = KemKeyPair.from_seed(params, seed)
    return cert, kem_kp.sk


# ---------------------------------------------------------------------------
# TLS echo pair
# ---------------------------------------------------------------------------

def _echo_until_closed(session) -> None:
    while True:
        try:
            data = session.recv()
        except ConnectionClosed:
            break
        session.send(data)


def _serve_connection(conn: socket.socket, config: ServerTlsConfig, timeout: float | None):
    transport = SocketTransport(conn, timeout=timeout)
    session = server_handshake(transport, config)
    try:
        _echo_until_closed(session)
    finally:
        session.close()


def _cmd_tls_serve(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    level = SecurityLevel.from_name(args.level)
    cert, kem_secret = _load_server_material(args)
    config = ServerTlsConfig(
        registry=registry, level=level, certificate=cert, kem_secret=kem_secret
    )
    listener = socket.create_server(("127.0.0.1", args.port))
    try:
        port = listener.getsockname()[1]
        print(f"PORT {port}", flush=True)
        if args.once:
            conn, _ = listener.accept()
            _serve_connection(conn, config, args.timeout)
            return 0
        while True:
            conn, _ = listener.accept()
            worker = threading.Thread(
                target=_serve_connection,
                args=(conn, config, args.timeout),
                daemon=True,
            )
            worker.start()
    except KeyboardInterrupt:
        return 0
    finally:
        listener.close()


def _probe_bytes(n: int) -> bytes:
    """A fixed recognizable pattern; reproducibility matters more than
    randomness for an echo check."""
    block = bytes(range(256))
    return (block * (n // 256 + 1))[:n]


def _cmd_tls_connect(args: argparse.Namespace) -> int:
    registry = _load_registry_arg(args)
    level = SecurityLevel.from_name(args.level)
    roots = (_read_file(os.path.join(args.dir, CA_ROOT_FILE)),)
    host, _, port_text = args.address.rpartition(":")
    if not host or not port_text.isdigit():
        raise UsageError(f"address must be HOST:PORT, got {args.address!r}")
    config = ClientTlsConfig(registry=registry, level=level, trusted_roots=roots)
    transport = connect_tcp(host, int(port_text), timeout=args.timeout)
    try:
        session = client_handshake(transport, config)
    except (TlsError, ConnectionClosed):
        transport.close()
        raise
    try:
        probe = _probe_bytes(args.probe_bytes)
        session.send(probe)
        echoed = session.recv_exact(len(probe))
        if echoed != probe:
            return _fail("echo mismatch: peer returned different bytes")
    finally:
        session.close()
    report = transcript_report(session.transcript)
    _write_output((json.dumps(report, indent=2, sort_keys=True) + "\n").encode(), args.out)
    print(
        f"handshake complete, echoed {len(probe)} bytes, "
        f"handshake volume {report['total_bytes']} bytes",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------------------
# Measurement harness
# ---------------------------------------------------------------------------

def _run_loopback_handshake(
    client_config: ClientTlsConfig, server_config: ServerTlsConfig
):
    """One in-process handshake over a socket pair; returns the client's
    transcript."""
    client_transport, server_transport = transport_pair(timeout=30.0)
    server_exc: list[BaseException] = []

    def server_side() -> None:
        try:
            session = server_handshake(server_transport, server_config)
            _echo_until_closed(session)
        except BaseException as exc:
            server_exc.append(exc)

    worker = threading.Thread(target=server_side, daemon=True)
    worker.start()
    try:
        session = client_handshake(client_transport, client_config)
        session.close()
    finally:
        client_transport.close()
        worker.join(timeout=60.0)
        server_transport.close()
    if server_exc and not isinstance(server_exc[0], (ConnectionClosed, TlsError)):
        raise server_exc[0]
    return session.transcript


def _stats(values: list) -> dict:
    return {
        "min": min(values),
        "median": statistics.median(values),
        "max": max(values),
    }


def aggregate_reports(reports: list[dict]) -> dict:
    """Fold per-handshake transcript reports into one report with
    min/median/max for every size and timing figure.  All runs must have
    followed the same message sequence."""
    first = reports[0]
    shape = [(m["message"], m["direction"]) for m in first["messages"]]
    for rep in reports[1:]:
        if [(m["message"], m["direction"]) for m in rep["messages"]] != shape:
            raise ValueError("handshake runs diverged in message sequence")
    messages = []
    for idx, (name, direction) in enumerate(shape):
        sizes = [rep["messages"][idx]["bytes"] for rep in reports]
        messages.append(
            {"message": name, "direction": direction, "bytes": _stats(sizes)}
        )
    return {
        "repetitions": len(reports),
        "suite": first["suite"],
        "suite_name": first["suite_name"],
        "templates": first["templates"],
        "messages": messages,
        "total_bytes": _stats([rep["total_bytes"] for rep in reports]),
        "total_sent": _stats([rep["total_sent"] for rep in reports]),
        "total_received": _stats([rep["total_received"] for rep in reports]),
        "duration_ms": _stats([rep["duration_ms"] for rep in reports]),
        "aborted": any(rep["aborted"] for rep in reports),
    }


def run_measurement(
    paramset: str, repetitions: int, seed: str | None = None
) -> dict:
    """Generate fixture keys for the parameter set, run the handshake
    ``repetitions`` times over an in-process loopback, and aggregate the
    client-side transcripts."""
    if paramset not in PARAMSET_LEVELS:
        raise UsageError(
            f"unknown parameter set {paramset!r}; choose from {sorted(PARAMSET_LEVELS)}"
        )
    level = PARAMSET_LEVELS[paramset]
    registry = builtin_registry(1)
    setup_rng = _make_rng(None if seed is None else seed + "/setup")
    issuer, kem_kp, cert, _ = _issue_server_material(
        registry, level, f"measure-{paramset}", setup_rng
    )
    started = time.monotonic()
    reports = []
    for rep in range(repetitions):
        client_rng = _make_rng(None if seed is None else f"{seed}/client/{rep}")
        server_rng = _make_rng(None if seed is None else f"{seed}/server/{rep}")
        client_config = ClientTlsConfig(
            registry=registry,
            level=level,
            trusted_roots=(issuer.root,),
            rng=client_rng,
        )
        server_config = ServerTlsConfig(
            registry=registry,
            level=level,
            certificate=cert,
            kem_secret=kem_kp.sk,
            rng=server_rng,
        )
        transcript = _run_loopback_handshake(client_config, server_config)
        reports.append(transcript_report(transcript))
    aggregated = aggregate_reports(reports)
    aggregated["paramset"] = paramset
    aggregated["level"] = level.name.lower()
    aggregated["wall_clock_s"] = round(time.monotonic() - started, 3)
    return aggregated


def _cmd_measure(args: argparse.Namespace) -> int:
    report = run_measurement(args.paramset, args.reps, seed=args.seed)
    _write_output((json.dumps(report, indent=2, sort_keys=True) + "\n").encode(), args.out)
    print(
        f"{args.reps} handshakes at {args.paramset}: "
        f"median total {report['total_bytes']['median']} bytes, "
        f"median duration {report['duration_ms']['median']} ms",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------------

def _add_keystore_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--keystore", required=True, help="path to the keystore file")
    sub.add_argument(
        "--password",
        help=f"keystore password (default: ${PASSWORD_ENV_VAR})",
    )
    sub.add_argument(
        "--kdf-iterations",
        type=int,
        default=None,
        help="key-derivation iteration count (default: library default)",
    )


def _add_registry_arg(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--registry",
        help="template registry file (default: built-in version 1)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agilecrypt",
        description="Security-level driven signing, encryption, and a TLS echo pair.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("keygen", help="create a key under a security-level template")
    p.add_argument("kind", choices=("sign", "encrypt"))
    p.add_argument("--level", required=True, choices=("low", "medium", "high"))
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument("--out", help="write the public key blob here")
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("sign", help="sign a file with a keystore key")
    p.add_argument("infile", help="message file")
    p.add_argument("--alias", required=True)
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument("--out", help="signature output (default: INFILE.sig)")
    p.set_defaults(func=_cmd_sign)

    p = sub.add_parser("verify", help="check a detached signature")
    p.add_argument("infile", help="message file")
    p.add_argument("--public", required=True, help="signer public key blob")
    p.add_argument("--sig", required=True, help="signature blob")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("encrypt", help="hybrid-encrypt a file to a recipient")
    p.add_argument("infile")
    p.add_argument("--alias", required=True, help="own encryption key alias")
    p.add_argument("--recipient", required=True, help="recipient public key blob")
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument("--out", help="ciphertext output (default: INFILE.enc)")
    p.set_defaults(func=_cmd_encrypt)

    p = sub.add_parser("decrypt", help="decrypt a hybrid ciphertext")
    p.add_argument("infile")
    p.add_argument("--alias", required=True)
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument("--out", help="plaintext output (default: stdout)")
    p.set_defaults(func=_cmd_decrypt)

    p = sub.add_parser(
        "envelope-seal", help="sign a message and seal it to a recipient"
    )
    p.add_argument("infile")
    p.add_argument("--alias", required=True, help="signing key alias")
    p.add_argument("--recipient", required=True, help="recipient public key blob")
    p.add_argument("--sender-id", help="sender name in the envelope header")
    p.add_argument("--recipient-id", help="recipient name in the envelope header")
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument(
        "--out", help=f"envelope output (default: INFILE{ENVELOPE_EXTENSION})"
    )
    p.set_defaults(func=_cmd_envelope_seal)

    p = sub.add_parser(
        "envelope-open", help="open an envelope and verify its signature"
    )
    p.add_argument("infile")
    p.add_argument("--alias", required=True, help="own encryption key alias")
    p.add_argument("--sender", required=True, help="sender public key blob")
    _add_keystore_args(p)
    _add_registry_arg(p)
    p.add_argument("--out", help="message output (default: stdout)")
    p.set_defaults(func=_cmd_envelope_open)

    p = sub.add_parser("registry-dump", help="print a built-in registry as text")
    p.add_argument("--builtin", type=int, required=True, choices=(1, 2))
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=_cmd_registry_dump)

    p = sub.add_parser(
        "tls-setup", help="generate CA root, server certificate, and server key files"
    )
    p.add_argument("--dir", required=True, help="output directory")
    p.add_argument("--level", required=True, choices=("low", "medium", "high"))
    p.add_argument("--subject", default="agilecrypt-server")
    p.add_argument("--seed", help="deterministic generation seed (fixtures only)")
    _add_registry_arg(p)
    p.set_defaults(func=_cmd_tls_setup)

    p = sub.add_parser("tls-serve", help="echo server for the 0x1306 suite")
    p.add_argument("--dir", required=True, help="directory written by tls-setup")
    p.add_argument("--level", required=True, choices=("low", "medium", "high"))
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--once", action="store_true", help="serve one connection, then exit")
    p.add_argument("--timeout", type=float, default=30.0, help="per-read timeout seconds")
    _add_registry_arg(p)
    p.set_defaults(func=_cmd_tls_serve)

    p = sub.add_parser("tls-connect", help="handshake, echo a probe, print the report")
    p.add_argument("address", help="HOST:PORT")
    p.add_argument("--dir", required=True, help="directory written by tls-setup")
    p.add_argument("--level", required=True, choices=("low", "medium", "high"))
    p.add_argument("--probe-bytes", type=int, default=1024)
    p.add_argument("--timeout", type=float, default=30.0, help="per-read timeout seconds")
    _add_registry_arg(p)
    p.add_argument("--out", help="report output (default: stdout)")
    p.set_defaults(func=_cmd_tls_connect)

    p = sub.add_parser(
        "measure", help="run loopback handshakes and report message sizes"
    )
    p.add_argument("--paramset", required=True, choices=sorted(PARAMSET_LEVELS))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", help="deterministic run seed (reports then differ only in timing)")
    p.add_argument("--out", help="report output (default: stdout)")
    p.set_defaults(func=_cmd_measure)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "kdf_iterations", None) is None and hasattr(args, "keystore"):
        args.kdf_iterations = DEFAULT_ITERATIONS
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"agilecrypt: error: {exc}", file=sys.stderr)
        return 2
    except TlsError as exc:
        return _fail(f"handshake failed: {_alert_label(exc)} ({exc})")
    except (AgilecryptError, OSError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
