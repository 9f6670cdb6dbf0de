//! Holds the `acceptance` test target, which runs after every `qnet` test
//! in a workspace test run.
