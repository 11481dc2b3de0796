"""Fear-response transfer learning for PTSD severity estimation from ECG and GSR."""

__version__ = "0.1.0"
