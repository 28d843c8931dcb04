from .registry import INDEXES, index_class, open_index

__all__ = ["INDEXES", "index_class", "open_index"]
