// Anchor translation unit for the shared unit-test precompiled header.
