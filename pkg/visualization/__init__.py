"""Plots and reports for latent editing runs."""
