# Copyright (c) 2026 The introloop authors
# SPDX-License-Identifier: Apache-2.0
"""Closed-loop introspection of a simulated guest."""

from ._core import IntroloopError, Lab, reconstruct, scan_image, standard_profile

__all__ = ["IntroloopError", "Lab", "reconstruct", "scan_image", "standard_profile"]
