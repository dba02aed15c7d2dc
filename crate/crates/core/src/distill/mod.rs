//! Null-space diffusion distillation: an offline cache of fixed-seed DDNM+
//! teacher reconstructions, and a single-pass student conditioned on
//! `concat(y, A†y)` that predicts a residual added to the anchor `A†y`.

mod cache;
mod student;
mod train;

pub use cache::{
    build_teacher_cache, conditioning_hash, is_test_id, teacher_hash, CacheEntry, CacheManifest,
    MeasurementItem, TeacherCache, TeacherConfig, TeacherTarget,
};
pub use student::{
    student_forward, student_infer_batch, student_input, write_inference_csv, InferenceRecord,
    StudentModel, TimestepTag,
};
pub use train::{train_student, StudentTrainConfig, TrainingCurves};
