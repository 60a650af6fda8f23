#pragma once

#include <gtest/gtest.h>

#include "pushtrace/error.hpp"

#define EXPECT_PT_ERROR(stmt, expected_code)                                                          \
    do {                                                                                              \
        try {                                                                                         \
            stmt;                                                                                     \
            ADD_FAILURE() << "expected " << pushtrace::to_string(expected_code) << " from " #stmt;    \
        } catch (const pushtrace::Error& e_) {                                                        \
            EXPECT_EQ(e_.code(), expected_code) << e_.what();                                         \
        }                                                                                             \
    } while (0)
