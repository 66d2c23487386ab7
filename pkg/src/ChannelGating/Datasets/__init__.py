from .DatasetSource import DatasetSource, ImageSet
from .Cifar10 import load_cifar10, parse_records, read_batch_file
from .Synthetic import synthetic_conditional_dataset
from .BatchLoader import BatchLoader
