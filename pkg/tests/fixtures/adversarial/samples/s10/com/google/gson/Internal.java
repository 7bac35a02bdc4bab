package com.google.gson;

public class Internal {
    public void f() throws Exception {
        java.security.MessageDigest.getInstance("MD5");
        javax.crypto.Cipher.getInstance("AES");
    }
}
