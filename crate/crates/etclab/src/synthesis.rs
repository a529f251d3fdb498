//! Controller/trigger co-design drivers.
