//! Dataset readers and the binary model, ensemble and adversarial-set formats.

pub mod adversarial;
pub mod cifar;
pub mod ensemble;
pub mod idx;
pub mod model;
pub mod report;

mod bytes;

pub use adversarial::{load_adversarial_set, save_adversarial_set, AdversarialSet, StoredRecord};
pub use cifar::load_cifar10;
pub use ensemble::{load_ensemble, save_ensemble};
pub use idx::{load_mnist, load_mnist_split};
pub use model::{load_model, save_model};
pub use report::{write_report, Report};
