//! Home of the `acceptance` test target, which checks the end-to-end
//! requirements of the pipeline and prints one PASS/FAIL line per criterion.
//! Run it with `cargo test -p gridsafe-validation --test acceptance`.
