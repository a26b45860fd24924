pub mod attention;
pub mod decay;
pub mod ids;
pub mod layout;
