# Test suite init file