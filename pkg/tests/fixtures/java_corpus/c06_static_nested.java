package com.example.nest2;

public final class Holder {
    public static final class Builder {
        private String value;

        public Builder value(String v) {
            this.value = v;
            return this;
        }

        public Holder build() {
            return new Holder();
        }
    }

    private static class Cache {
        static Object get(String key) { return null; }
    }

    public static Builder builder() {
        return new Builder();
    }
}
