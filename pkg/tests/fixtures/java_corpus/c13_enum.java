package com.example.enums;

public enum Operation {
    PLUS("+") {
        @Override
        int apply(int a, int b) { return a + b; }
    },
    MINUS("-") {
        @Override
        int apply(int a, int b) { return a - b; }
    };

    private final String symbol;

    Operation(String symbol) {
        this.symbol = symbol;
    }

    abstract int apply(int a, int b);

    public String symbol() {
        return symbol;
    }
}
