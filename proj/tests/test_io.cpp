#include <gtest/gtest.h>
TEST(Placeholder, T) { SUCCEED(); }
