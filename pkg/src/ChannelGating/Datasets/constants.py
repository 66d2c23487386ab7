# Dataset formats and normalization

DATASET_KINDS = ("cifar10-binary", "synthetic-conditional")

# CIFAR-10 binary layout: 1 label byte, then the R, G and B planes of a 32x32 image
CIFAR_SIZE = 32
CIFAR_CHANNELS = 3
CIFAR_CLASSES = 10
CIFAR_RECORD_SIZE = 1 + CIFAR_CHANNELS * CIFAR_SIZE * CIFAR_SIZE  # 3073
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

# per-channel statistics of the CIFAR-10 training set, on a [0, 1] pixel scale
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)

# synthetic class-conditional images
SYNTHETIC_SIZE = 32
SYNTHETIC_BACKGROUND = 128
SYNTHETIC_AMPLITUDE = 80
SYNTHETIC_NOISE = 24

AUGMENT_PADDING = 4
