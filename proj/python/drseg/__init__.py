"""Python bindings for the drseg segmentation head library."""

try:
    from . import _drseg as _ext
except ImportError:  # build tree: the extension sits next to the package, not inside it
    import _drseg as _ext

__all__ = [name for name in dir(_ext) if not name.startswith("_")]
globals().update({name: getattr(_ext, name) for name in __all__})
