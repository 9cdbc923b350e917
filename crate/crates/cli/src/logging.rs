//! `level\tstage\tdoc\tmessage` lines on stderr. Records from the core crate
//! already carry the stage and document; anything else is tagged with its
//! module path and `-`.

use std::io::Write;

pub fn init() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let level = record.level().as_str().to_ascii_lowercase();
            if record.target() == "semvar" {
                writeln!(buf, "{level}\t{}", record.args())
            } else {
                writeln!(buf, "{level}\t{}\t-\t{}", record.target(), record.args())
            }
        })
        .init();
}
