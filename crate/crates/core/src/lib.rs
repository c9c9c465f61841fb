//! Community energy pricing under operating envelopes.

pub mod benchmark;
pub mod community;
pub mod dnem;
pub mod error;
pub mod ingest;
pub mod pricing;
pub mod random;
pub mod solver;
pub mod tariff;
pub mod utility;

pub use benchmark::{benchmark_deltas, benchmark_respond, BenchmarkResponse, BenchmarkZone, Member};
pub use community::{
    brute_force_welfare, centralized_welfare, community_respond, comparative_statics, expected_voc_sign, surplus_chain,
    verify_axioms, voc, AxiomReport, CentralizedWelfare, CommunityOutcome, MemberOutcome, Parameter, Sign,
    StaticsReport, SurplusChain, VocReport, ZeroCase,
};
pub use dnem::{dnem_member_respond, dnem_schedule, DnemResponse, DnemSchedule, DnemZone, OeBinding};
pub use error::{Error, Result};
pub use ingest::{load_config, load_series, CommunityConfig, Model, ScenarioSeries, TariffCalendar};
pub use pricing::{
    compute_sigmas, fixed_rewards, member_payment, price_policy, solve_chi, Community, PriceSchedule, PriceZone,
    RewardAllocation,
};
pub use random::{Instance, InstanceSpec, ZoneCoverage};
pub use solver::{Bisection, SolutionInterval};
pub use tariff::{nem_payment, nem_rate, NemTariff};
pub use utility::{ConcaveUtility, DeviceUtility, UtilityBundle};
