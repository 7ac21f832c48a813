"""Cuffless blood pressure estimation from simultaneous ECG and PPG waveforms.

The package covers the full chain: record ingestion (WFDB-style binary and
CSV), adaptive tunable-Q wavelet preprocessing, non-uniform two-cycle
segmentation into 513-dimensional waveform feature vectors, a hierarchical
dense + recurrent sequence regressor trained from scratch, and clinical-grade
evaluation (AAMI / BHS / Bland-Altman / correlation statistics).
"""

from bpnet.tqwt import TqwtParams, SubbandSet, FrequencyTable, decompose, reconstruct
from bpnet.recordio import PatientRecord, RecordDescriptor, read_csv_record, read_wfdb_record, select_channels
from bpnet.segmentation import FeatureVector, TargetPair, SequenceSample, DatasetSplit
from bpnet.model import ModelParams, TrainConfig, AdamState, TrainedModel

__all__ = [
    "TqwtParams",
    "SubbandSet",
    "FrequencyTable",
    "decompose",
    "reconstruct",
    "PatientRecord",
    "RecordDescriptor",
    "read_csv_record",
    "read_wfdb_record",
    "select_channels",
    "FeatureVector",
    "TargetPair",
    "SequenceSample",
    "DatasetSplit",
    "ModelParams",
    "TrainConfig",
    "AdamState",
    "TrainedModel",
]

__version__ = "0.1.0"
