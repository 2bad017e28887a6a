"""Adaptive latent fusion editing with DDIM / rectified-flow samplers and analytic denoisers."""
