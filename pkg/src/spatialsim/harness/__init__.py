from .runner import LayerResult, run_layer, DATAFLOWS

__all__ = ["LayerResult", "run_layer", "DATAFLOWS"]
