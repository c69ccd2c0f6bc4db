//! Factor, return, market-cap and risk-free panels plus rolling window plans.

mod io;
mod month;
mod panel;
mod plan;

pub use io::{load_panel, load_riskfree, write_panel, write_riskfree};
pub use month::Month;
pub use panel::{
    align_on_dates, filter_by_missingness, FactorPanel, MarketCapPanel, Panel, PanelKind,
    ReturnsPanel, RiskFreeSeries,
};
pub use plan::{make_rolling_plan, validation_len, RollingWindowPlan, Window};
