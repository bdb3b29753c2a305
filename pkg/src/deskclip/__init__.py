"""deskclip: desk-scale contrastive vision pretraining and multimodal finetuning."""

__version__ = "0.1.0"
