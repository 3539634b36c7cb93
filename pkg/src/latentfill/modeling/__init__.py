from latentfill.modeling.pipeline import InpaintingModel, build_model

__all__ = ["InpaintingModel", "build_model"]
