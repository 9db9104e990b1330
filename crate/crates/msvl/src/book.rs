//! Doc-test harness for the guide chapters (placeholder).
