//! Objective evaluation battery: classification accuracy, ROC/EER,
//! k-nearest-neighbor mutual information with PCA reduction, and a
//! classifier-based speaker-verification protocol.

pub mod mi;
pub mod pca;
pub mod roc;
pub mod verify;

pub use mi::{digamma, knn_mutual_information, select_mi_pair};
pub use pca::{pca_fit, pca_project, PcaModel};
pub use roc::{binary_accuracy, eer, eer_from_roc, roc_auc, roc_curve, Trial};
pub use verify::{
    speaker_verification_eer, train_speaker_classifier, ClassifierConfig, SpeakerClassifier,
};
