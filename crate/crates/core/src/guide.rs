//! Book chapters as doc-tests (filled in with the book).
