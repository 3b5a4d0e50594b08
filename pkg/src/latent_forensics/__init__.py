from latent_forensics.main import main

__all__ = ("main",)
