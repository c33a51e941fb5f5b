//! Validity statistics: within fixed-effects regression against a survey
//! panel, cross-sectional correlations with external criteria, and the
//! event-week study.

pub mod correlation;
pub mod events;
pub mod fixed_effects;
pub mod survey;

pub use correlation::{external_correlations, pearson, pearson_test, Correlation};
pub use events::{
    bootstrap_ci, event_cohens_d, event_study, mark_event_weeks, zscored_pct_change, BootstrapCi, BootstrapMethod,
    EventCalendar, EventStudyResult, DEFAULT_BOOTSTRAP_ITERATIONS,
};
pub use fixed_effects::{join_panel, pooled_ols, within_fixed_effects, FixedEffectsResult, PanelObservation, SeKind};
pub use survey::{survey_gate, SurveyResponse, SurveyRow, SURVEY_RELIABILITY_STANDARD};
