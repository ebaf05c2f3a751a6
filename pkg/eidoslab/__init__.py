"""Latent-predictive time-series forecasting -- autograd core, model, training, evaluation and probing."""
__all__ = [
    "config","errors","tensor","gradcheck","tokenizer","backbone","model",
    "objectives","datagen","dataset_io","optim","checkpoint","trainer",
    "forecast","metrics","evaluate","export","represent","plots",
    "run_config","paths","manifest","run_summary","cli",
]
