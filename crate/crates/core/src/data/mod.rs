//! Datasets, partitions and synthetic problem suites.

mod dataset;
mod idx;
mod partition;
mod synthetic;

pub use dataset::{Dataset, Split};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxImages, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{dirichlet_partition, Partition};
pub use synthetic::{absdev_suite, quadratic_suite_from_parts, synthetic_quadratic_suite, Suite};

/// Environment variable naming the directory holding the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "AREA_DATA_DIR";

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const MNIST_CLASSES: usize = 10;
