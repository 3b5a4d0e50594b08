from latent_forensics.services.pipeline import Pipeline, Stage

__all__ = ["Pipeline", "Stage"]
