package com.example.abs;

public abstract class Base {
    protected String name;

    public abstract void execute();

    protected abstract int priority(int level);

    public final String describe() {
        return name + priority(0);
    }

    native void nativeHook(long ptr);
}
