"""Serve a trained checkpoint over the TDNZ0001 stdio protocol.

Strictly alternating request/response. ``hello`` declares the checkpoint's
native volume shape, ``predict`` runs the network (an absent condition
means the all-zeros branch it was trained with), ``bye`` is acknowledged
and ends the loop with exit code 0. Any malformed frame is answered with
an ``error`` frame and exit code 3. Inference is single-threaded and
deterministic for a fixed checkpoint.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import torch

from . import wire
from .model import ConditionalDenoiser

EXIT_OK = 0
EXIT_PROTOCOL = 3


def load_checkpoint(path: Path | str) -> tuple[ConditionalDenoiser, tuple[int, int, int]]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    dims = tuple(int(d) for d in blob["dims"])
    net = ConditionalDenoiser(dims[0], int(blob["base_channels"]))
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net, dims


def serve(checkpoint: Path | str, stdin=None, stdout=None) -> int:
    torch.set_num_threads(1)
    net, dims = load_checkpoint(checkpoint)
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer

    def send(header: dict, *payloads: np.ndarray) -> None:
        stdout.write(wire.encode_frame(header, *payloads))
        stdout.flush()

    while True:
        try:
            header, payloads = wire.read_frame(stdin, is_request=True)
        except wire.PeerClosed:
            return EXIT_OK
        except wire.WireError as exc:
            send(wire.make_header("error", dims, message=str(exc)))
            return EXIT_PROTOCOL

        kind = header["kind"]
        if kind == "hello":
            send(wire.make_header("hello", dims))
        elif kind == "bye":
            send(wire.make_header("bye", dims))
            return EXIT_OK
        elif kind == "predict":
            if tuple(header["dims"]) != dims:
                send(
                    wire.make_header(
                        "error", dims,
                        message=f"shape {header['dims']} does not match checkpoint {list(dims)}",
                    )
                )
                return EXIT_PROTOCOL
            x_t = torch.from_numpy(payloads[0][None])
            if header.get("has_condition"):
                cond = torch.from_numpy(payloads[1][None])
            else:
                cond = torch.zeros_like(x_t)
            t = torch.tensor([float(header["t"])], dtype=torch.float32)
            theta = torch.tensor([float(header["theta_deg"])], dtype=torch.float32)
            dtheta = torch.tensor([float(header["dtheta_deg"])], dtype=torch.float32)
            with torch.no_grad():
                eps = net(x_t, cond, t, theta, dtheta)[0].numpy().astype(np.float32)
            send(
                wire.make_header(
                    "predict", dims,
                    t=header["t"], theta_deg=header["theta_deg"], dtheta_deg=header["dtheta_deg"],
                ),
                eps,
            )
        else:
            send(wire.make_header("error", dims, message=f"unknown kind {kind!r}"))
            return EXIT_PROTOCOL
