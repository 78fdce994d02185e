pub mod activation;
pub mod mac;
pub mod cca;
pub mod aqm;
pub mod scenario;
pub mod sim;
pub mod report;
pub mod output;
