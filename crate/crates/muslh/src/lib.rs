pub mod absdom;
pub mod absint;
pub mod cli;
pub mod concrete;
pub mod hardener;
pub mod lang;
pub mod oracle;
pub mod taint;
